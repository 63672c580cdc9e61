"""Straight-line reference for the 3-digit Feistel cipher used by blockkey.

Prints encrypt(n) for the golden inputs so the Rust table in
crates/core/src/fpe.rs can be checked against an independent implementation.
"""
import hashlib
import hmac
import sys


def round_value(password: bytes, t: int, right: int, right_len: int, modulus: int) -> int:
    msg = bytes([t]) + str(right).zfill(right_len).encode("ascii")
    digest = hmac.new(password, msg, hashlib.sha256).digest()
    return int.from_bytes(digest, "big") % modulus


def encrypt(password: bytes, n: int) -> int:
    digits = str(n).zfill(3)
    for t in range(10):
        left_len = 1 if t % 2 == 0 else 2
        left, right = digits[:left_len], digits[left_len:]
        modulus = 10 ** left_len
        new_left = (int(left) + round_value(password, t, int(right), len(right), modulus)) % modulus
        digits = right + str(new_left).zfill(left_len)
    return int(digits)


if __name__ == "__main__":
    password = (sys.argv[1] if len(sys.argv) > 1 else "password").encode()
    for n in (0, 1, 255, 999):
        print(n, encrypt(password, n))
    table = [encrypt(password, n) for n in range(1000)]
    assert sorted(table) == list(range(1000))
