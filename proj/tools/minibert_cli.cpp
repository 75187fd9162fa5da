#include "minibert/cli.hpp"

int main(int argc, char** argv) { return minibert::cli_main(argc, argv); }
