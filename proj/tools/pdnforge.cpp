#include "pdnforge/cli.hpp"

int main(int argc, char** argv) { return pdnforge::cli::run(argc, argv); }
