#include "cli.hpp"

int main(int argc, char** argv) { return rgtrec::cli::run(argc, argv); }
