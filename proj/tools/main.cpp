#include "evloop/cli.hpp"

int main(int argc, char** argv) { return evloop::cli_dispatch(argc, argv); }
