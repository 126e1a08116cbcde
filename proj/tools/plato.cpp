#include "plato/cli/cli.hpp"

int main(int argc, char** argv) { return plato::cli::run(argc, argv); }
