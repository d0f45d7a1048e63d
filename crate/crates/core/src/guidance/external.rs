//! Byte protocol for a denoiser running in another process.
//!
//! Request: `t` (f64), condition id (u64), dims `c, h, w` (u32 each), then
//! `c * h * w` f32 values in row-major `h, w, c` order. Reply: the same
//! number of f32 values. All little-endian; one request per connection.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use super::model::{ConditionSet, GuidanceModel};
use crate::error::{Error, Result};
use crate::frame::Image;

const MAX_ELEMENTS: usize = 1 << 28;

/// Request header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireHeader {
    pub t: f64,
    pub condition: u64,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl WireHeader {
    fn elements(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize
    }
}

pub fn write_request(w: &mut impl Write, header: &WireHeader, body: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 4 * body.len());
    buf.extend_from_slice(&header.t.to_le_bytes());
    buf.extend_from_slice(&header.condition.to_le_bytes());
    for d in [header.channels, header.height, header.width] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    put_f32s(&mut buf, body);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_request(r: &mut impl Read) -> Result<(WireHeader, Vec<f64>)> {
    let mut head = [0u8; 28];
    r.read_exact(&mut head)?;
    let u32_at = |k: usize| u32::from_le_bytes(head[k..k + 4].try_into().unwrap());
    let header = WireHeader {
        t: f64::from_le_bytes(head[0..8].try_into().unwrap()),
        condition: u64::from_le_bytes(head[8..16].try_into().unwrap()),
        channels: u32_at(16),
        height: u32_at(20),
        width: u32_at(24),
    };
    let n = header.elements();
    if n == 0 || n > MAX_ELEMENTS {
        return Err(Error::Protocol(format!("bad tensor dims {n}")));
    }
    Ok((header, read_f32s(r, n)?))
}

fn put_f32s(buf: &mut Vec<u8>, body: &[f64]) {
    for v in body {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_reply(w: &mut impl Write, body: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * body.len());
    put_f32s(&mut buf, body);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Client side: a `GuidanceModel` that forwards every call over TCP.
/// Values cross the wire as f32.
#[derive(Clone, Debug)]
pub struct ExternalDenoiser {
    pub address: String,
    pub resolution: (usize, usize),
    pub latent: bool,
}

impl ExternalDenoiser {
    pub fn new(address: impl Into<String>, resolution: (usize, usize)) -> Self {
        Self {
            address: address.into(),
            resolution,
            latent: false,
        }
    }
}

impl GuidanceModel for ExternalDenoiser {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, t: f64) -> Result<Image> {
        let mut stream = TcpStream::connect(&self.address)?;
        let header = WireHeader {
            t,
            condition: cond.wire_id(),
            channels: x_t.channels as u32,
            height: x_t.height as u32,
            width: x_t.width as u32,
        };
        write_request(&mut stream, &header, &x_t.data)?;
        let data = read_f32s(&mut stream, x_t.data.len())?;
        Ok(Image { data, ..x_t.clone() })
    }

    fn native_resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn is_latent(&self) -> bool {
        self.latent
    }
}

/// Decode a wire condition id back into a condition set.
pub fn condition_from_wire(id: u64) -> ConditionSet {
    if id == 0 {
        return ConditionSet::default();
    }
    let mut c = ConditionSet::text(id & !(1 << 63));
    if id >> 63 == 1 {
        c.image = Some(1);
    }
    c
}

/// Serve `model` on `listener` in a background thread for at most
/// `max_requests` connections (unbounded when `None`).
pub fn spawn_server<M: GuidanceModel + Send + 'static>(
    listener: TcpListener,
    model: M,
    max_requests: Option<usize>,
) -> thread::JoinHandle<Result<usize>> {
    thread::spawn(move || {
        let mut served = 0;
        for conn in listener.incoming() {
            let mut s = conn?;
            let (h, body) = read_request(&mut s)?;
            let x = Image {
                width: h.width as usize,
                height: h.height as usize,
                channels: h.channels as usize,
                data: body,
            };
            let eps = model.denoise(&x, &condition_from_wire(h.condition), h.t)?;
            write_reply(&mut s, &eps.data)?;
            served += 1;
            if max_requests.is_some_and(|m| served >= m) {
                break;
            }
        }
        Ok(served)
    })
}

/// Bind a loopback listener on an ephemeral port.
pub fn loopback_listener() -> Result<(TcpListener, String)> {
    let l = TcpListener::bind(("127.0.0.1", 0))?;
    let addr = l.local_addr()?.to_string();
    Ok((l, addr))
}
