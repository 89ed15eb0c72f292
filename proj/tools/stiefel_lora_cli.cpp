#include "stiefel_lora/commands.hpp"

int main(int argc, char** argv) { return stiefel_lora::run_cli(argc, argv); }
