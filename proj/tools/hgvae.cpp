#include "hgvae/cli.hpp"

int main(int argc, char** argv) { return hgvae::cli::run(argc, argv); }
