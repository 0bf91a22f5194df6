//! Independent acceptance oracle for AC1 lines, plus generators for valid
//! messages and malformed mutations.

#![allow(dead_code)]

use autocompose::transport::{RemoteRequest, RemoteResponse};
use autocompose::{Itemset, Money, ServiceId};
use rand::seq::SliceRandom;
use rand::Rng;
use regex::bytes::Regex;

pub struct WireOracle {
    request: Regex,
    ok: Regex,
    err: Regex,
}

impl WireOracle {
    pub fn new() -> Self {
        WireOracle {
            request: Regex::new(r"^AC1 REQ [!-~]+ ([1-9][0-9]*(?:,[1-9][0-9]*)*)\n$").unwrap(),
            ok: Regex::new(r"^AC1 OK (0|[1-9][0-9]*)\n$").unwrap(),
            err: Regex::new(r"^AC1 ERR [ -~]+\n$").unwrap(),
        }
    }

    pub fn valid_request(&self, line: &[u8]) -> bool {
        let Some(caps) = self.request.captures(line) else {
            return false;
        };
        let list = std::str::from_utf8(&caps[1]).unwrap();
        let mut prev = 0u64;
        for tok in list.split(',') {
            match tok.parse::<u64>() {
                Ok(v) if v > prev && v <= u32::MAX as u64 => prev = v,
                _ => return false,
            }
        }
        true
    }

    pub fn valid_response(&self, line: &[u8]) -> bool {
        if let Some(caps) = self.ok.captures(line) {
            return std::str::from_utf8(&caps[1])
                .unwrap()
                .parse::<u64>()
                .is_ok();
        }
        self.err.is_match(line)
    }
}

fn service_id(rng: &mut impl Rng) -> ServiceId {
    let len = rng.gen_range(1..12);
    let s: String = (0..len)
        .map(|_| rng.gen_range(b'!'..=b'~') as char)
        .collect();
    ServiceId::new(s).unwrap()
}

pub fn random_request(rng: &mut impl Rng) -> RemoteRequest {
    let n = rng.gen_range(1..8);
    let max = if rng.gen_bool(0.1) { u32::MAX } else { 40 };
    let items: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=max)).collect();
    RemoteRequest::new(service_id(rng), Itemset::from_indices(items).unwrap()).unwrap()
}

pub fn random_response(rng: &mut impl Rng) -> RemoteResponse {
    if rng.gen_bool(0.5) {
        let cost = if rng.gen_bool(0.1) {
            u64::MAX
        } else {
            rng.gen_range(0..1_000_000)
        };
        RemoteResponse::ok(Money(cost))
    } else {
        let len = rng.gen_range(1..30);
        let s: String = (0..len)
            .map(|_| rng.gen_range(b' '..=b'~') as char)
            .collect();
        RemoteResponse::error(s)
    }
}

const NASTY: &[&[u8]] = &[
    b" ",
    b"  ",
    b",",
    b",,",
    b"0",
    b"00",
    b"\n",
    b"\r",
    b"\t",
    b"\x00",
    b"\xff",
    b"\xc3\xa9",
    b"AC2",
    b"AC",
    b"REQ",
    b"OK",
    b"ERR",
    b"-1",
    b"99999999999999999999999",
];

/// Applies one to three random edits to `line`.
pub fn mutate(rng: &mut impl Rng, line: &[u8]) -> Vec<u8> {
    let mut out = line.to_vec();
    for _ in 0..rng.gen_range(1..=3) {
        let pos = rng.gen_range(0..=out.len());
        match rng.gen_range(0..6) {
            0 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                out[i] = rng.gen();
            }
            1 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                out.remove(i);
            }
            2 => {
                let chunk = NASTY.choose(rng).unwrap();
                out.splice(pos..pos, chunk.iter().copied());
            }
            3 => out.truncate(pos),
            4 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                let b = out[i];
                out.insert(i, b);
            }
            _ => out.insert(pos, rng.gen_range(b' '..=b'~')),
        }
    }
    out
}

pub fn random_bytes(rng: &mut impl Rng) -> Vec<u8> {
    let len = rng.gen_range(0..40);
    let mut v: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    if rng.gen_bool(0.5) {
        v.push(b'\n');
    }
    v
}
