//! A 3-digit decimal format-preserving Feistel cipher.
//!
//! The domain is `0..=999`. `n` is written as three digits and run through
//! ten rounds with alternating splits: on even rounds the left part is the
//! first digit, on odd rounds the first two. Round `t` computes
//!
//! ```text
//! F = HMAC-SHA256(password, [t] || ascii(right, zero-padded)) as big-endian int
//! left' = (left + F) mod 10^len(left)
//! state = right || left'
//! ```
//!
//! Decryption runs the rounds backwards and subtracts `F`.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::error::{Error, Result};

pub const DOMAIN_MAX: u16 = 999;
pub const ROUNDS: u8 = 10;

const DOMAIN: usize = DOMAIN_MAX as usize + 1;

#[derive(Clone)]
pub struct FeistelCipher {
    password: Vec<u8>,
    forward: Vec<u16>,
    inverse: Vec<u16>,
}

impl std::fmt::Debug for FeistelCipher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeistelCipher")
            .field("password_len", &self.password.len())
            .finish_non_exhaustive()
    }
}

impl PartialEq for FeistelCipher {
    fn eq(&self, other: &Self) -> bool {
        self.password == other.password
    }
}

/// Digit counts of (left, right) in round `t`.
fn split(t: u8) -> (u32, u32) {
    if t % 2 == 0 {
        (1, 2)
    } else {
        (2, 1)
    }
}

fn round_value(mac: &Hmac<Sha256>, t: u8, right: u16, right_len: u32, modulus: u16) -> u16 {
    let mut mac = mac.clone();
    mac.update(&[t]);
    mac.update(format!("{right:0width$}", width = right_len as usize).as_bytes());
    let digest = mac.finalize().into_bytes();
    let m = u32::from(modulus);
    digest
        .iter()
        .fold(0u32, |acc, &b| (acc * 256 + u32::from(b)) % m) as u16
}

impl FeistelCipher {
    pub fn new(password: impl Into<Vec<u8>>) -> Self {
        let password = password.into();
        let mac = Hmac::<Sha256>::new_from_slice(&password).expect("HMAC accepts any key length");
        let forward: Vec<u16> = (0..DOMAIN as u16)
            .map(|n| Self::encrypt_rounds(&mac, n))
            .collect();
        let inverse: Vec<u16> = (0..DOMAIN as u16)
            .map(|n| Self::decrypt_rounds(&mac, n))
            .collect();
        FeistelCipher {
            password,
            forward,
            inverse,
        }
    }

    pub fn password(&self) -> &[u8] {
        &self.password
    }

    fn encrypt_rounds(mac: &Hmac<Sha256>, n: u16) -> u16 {
        let mut state = n;
        for t in 0..ROUNDS {
            let (llen, rlen) = split(t);
            let (lmod, rmod) = (10u16.pow(llen), 10u16.pow(rlen));
            let (left, right) = (state / rmod, state % rmod);
            let f = round_value(mac, t, right, rlen, lmod);
            let new_left = (left + f) % lmod;
            state = right * lmod + new_left;
        }
        state
    }

    fn decrypt_rounds(mac: &Hmac<Sha256>, n: u16) -> u16 {
        let mut state = n;
        for t in (0..ROUNDS).rev() {
            let (llen, rlen) = split(t);
            let (lmod, rmod) = (10u16.pow(llen), 10u16.pow(rlen));
            let (right, new_left) = (state / lmod, state % lmod);
            let f = round_value(mac, t, right, rlen, lmod);
            let left = (new_left + lmod - f) % lmod;
            state = left * rmod + right;
        }
        state
    }

    pub fn encrypt(&self, n: u16) -> Result<u16> {
        self.forward.get(usize::from(n)).copied().ok_or_else(|| out_of_domain(n))
    }

    pub fn decrypt(&self, n: u16) -> Result<u16> {
        self.inverse.get(usize::from(n)).copied().ok_or_else(|| out_of_domain(n))
    }

    /// Encryption of an 8-bit pixel code; always in the domain.
    #[inline]
    pub fn encrypt_u8(&self, v: u8) -> u16 {
        self.forward[usize::from(v)]
    }

    /// The full permutation table `n -> encrypt(n)`.
    pub fn table(&self) -> &[u16] {
        &self.forward
    }
}

fn out_of_domain(n: u16) -> Error {
    Error::Domain(format!("{n} outside cipher domain 0..={DOMAIN_MAX}"))
}
