#include "unicaclf/cli.hpp"

int main(int argc, char** argv) { return unicaclf::cli::run(argc, argv); }
