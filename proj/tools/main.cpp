#include "cbmi/cli.hpp"

int main(int argc, char** argv) { return cbmi::cli::run(argc, argv); }
