#include "bdc/cli.hpp"

int main(int argc, char** argv) { return bdc::cli::run(argc, argv); }
