#include "gear/harness.hpp"

int main(int argc, char** argv) { return gear::harness::run_cli(argc, argv); }
