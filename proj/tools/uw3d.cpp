#include "uw3d/cli.hpp"

int main(int argc, char** argv) { return uw3d::cli::run(argc, argv); }
