#include "probeguard/cli.hpp"

int main(int argc, char** argv) { return probeguard::cli::run(argc, argv); }
