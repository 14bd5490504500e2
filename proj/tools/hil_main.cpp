#include "hil/cli.hpp"

int main(int argc, char** argv) { return hil::run_cli(std::vector<std::string>(argv, argv + argc)); }
