#include <iostream>

#include "ipvae/cli.hpp"

int main(int argc, char** argv) { return ipvae::cli::run(argc, argv, std::cout, std::cerr); }
