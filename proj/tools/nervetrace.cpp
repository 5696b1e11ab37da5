#include <nervetrace/cli.hpp>

int main(int argc, char** argv) { return nervetrace::cli::run(argc, argv); }
