#include "tiledet/cli.hpp"

int main(int argc, char** argv) { return tiledet::run_cli(argc, argv); }
