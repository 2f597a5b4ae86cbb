#include "hscal/cli.hpp"

int main(int argc, char** argv) { return hscal::cli::run(argc, argv); }
