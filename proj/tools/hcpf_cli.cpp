#include "hcpf/cli.hpp"

int main(int argc, char** argv) { return hcpf::cli::run(argc, argv); }
