#include "lattr/cli.hpp"

int main(int argc, char** argv) { return lattr::cli_main(argc, argv); }
