#include "pcrl/harness.hpp"

int main(int argc, char** argv) { return pcrl::run_cli(argc, argv); }
