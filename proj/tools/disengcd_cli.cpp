#include "disengcd/cli.hpp"

int main(int argc, char** argv) { return disengcd::cli::run(argc, argv); }
