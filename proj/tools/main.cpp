#include "medtraj/workbench.hpp"

int main(int argc, char **argv) { return medtraj::run_cli(argc, argv); }
