#include "commands.hpp"

#include "cpga/ops.hpp"

int main(int argc, char** argv) {
#ifdef CPGA_INJECT_CONV2D_FAULT
    cpga::testing::set_conv2d_sign_fault(true);
#endif
    return cpga::cli::run(argc, argv);
}
