// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
  std::printf("lsir: command-line interface under construction\n");
  return 0;
}
