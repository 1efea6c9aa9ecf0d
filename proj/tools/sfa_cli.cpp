// SPDX-License-Identifier: Apache-2.0

#include "sfa/cli.hpp"

int main(int argc, char** argv) { return sfa::cli::dispatch(argc, argv); }
