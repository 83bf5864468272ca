# Copyright 2026 The StaRFM Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference SplitMix64 stream for seed 42 (counter starts at 1)."""
M = (1 << 64) - 1


def mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


def stream_seed(seed, sid):
    return mix(seed ^ mix((sid + 0x632BE59BD9B4E019) & M))


def outputs(seed, n):
    return [mix((seed + k * 0x9E3779B97F4A7C15) & M) for k in range(1, n + 1)]


if __name__ == "__main__":
    print("# seed 42, first 16 outputs")
    for v in outputs(42, 16):
        print(f"{v:016x}")
    print("# stream(42, 3), first 4 outputs")
    for v in outputs(stream_seed(42, 3), 4):
        print(f"{v:016x}")
