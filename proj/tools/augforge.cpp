#include "augforge/cli.hpp"

int main(int argc, char** argv) { return augforge::run_cli(argc, argv); }
