#include "hubguard/cli.hpp"

int main(int argc, char** argv) { return hubguard::cli::dispatch(argc, argv); }
