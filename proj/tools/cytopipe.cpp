#include "cytopipe/cli.hpp"

int main(int argc, char** argv) { return cytopipe::run_cli(argc, argv); }
