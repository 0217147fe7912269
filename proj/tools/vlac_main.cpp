#include "vlac/commands.hpp"

int main(int argc, char** argv) { return vlac::run_cli(argc, argv); }
