#include "lava/cli.hpp"

int main(int argc, char** argv) { return lava::cli::run(argc, argv); }
