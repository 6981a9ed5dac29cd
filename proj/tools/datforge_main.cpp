#include <cstdio>

int main() {
  std::puts("dat-forge: commands not wired up yet");
  return 2;
}
