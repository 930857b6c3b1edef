#include "phenoswin/cli.hpp"

int main(int argc, char** argv) { return phenoswin::run_cli(argc, argv); }
