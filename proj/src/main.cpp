#include "dualslu/cli.hpp"

int main(int argc, char** argv) { return dualslu::run_cli(argc, argv); }
