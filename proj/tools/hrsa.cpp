#include <hrsa/cli.hpp>

int main(int argc, char** argv) { return hrsa::cli::run(argc, argv); }
