#include "neural_sheaf/cli.hpp"

int main(int argc, char** argv) { return neural_sheaf::run_cli(argc, argv); }
