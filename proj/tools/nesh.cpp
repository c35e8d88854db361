#include "nesh/cli.hpp"

int main(int argc, char** argv) { return nesh::cli::run(argc, argv); }
