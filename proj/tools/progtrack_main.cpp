#include "progtrack/cli/app.hpp"

int main(int argc, char** argv) { return progtrack::cli::main_entry(argc, argv); }
