#include "aiohmm/cli.hpp"

int main(int argc, char** argv) { return aiohmm::cli_dispatch(argc, argv); }
