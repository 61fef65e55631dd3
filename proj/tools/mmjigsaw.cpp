#include "mmjigsaw/io/cli.hpp"

int main(int argc, char** argv) { return mmjigsaw::cli_dispatch(argc, argv); }
