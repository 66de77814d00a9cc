#include "utd/cli.hpp"

int main(int argc, char** argv) { return utd::cli::dispatch(argc, argv); }
