#include "pipno/cli.hpp"

int main(int argc, char** argv) { return pipno::cli::run(argc, argv); }
