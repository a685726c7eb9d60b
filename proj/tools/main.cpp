#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return safectl::cli::main_entry(argc, argv, std::cout); }
