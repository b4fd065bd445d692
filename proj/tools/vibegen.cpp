#include <string>
#include <vector>

#include "vibegen/commands.hpp"
#include "vibegen/runtime.hpp"

int main(int argc, char** argv) {
    vibegen::tune_allocator();
    std::vector<std::string> args(argv + 1, argv + argc);
    return vibegen::run_cli(args);
}
