#include "gpderain/cli.hpp"

int main(int argc, char** argv) { return gpderain::cli::run(argc, argv); }
