//! Pipe-splicing data path for the network plane.
//!
//! Outbound, the payload pages are mapped into a pipe with `vmsplice` and
//! moved to the socket with `splice`, so the bytes are never copied into a
//! userspace staging buffer. Inbound, `splice` moves socket data into the
//! pipe and one `read` drains it into the target region.
//!
//! The pages handed to `vmsplice` may still be referenced by the socket
//! after the call returns. Callers keep the source region unmodified until
//! the peer's ACK arrives.

use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};

use wasmhose_core::TransferError;

fn last_os_error(context: &str) -> TransferError {
    crate::transport::wire::io_error(context, std::io::Error::last_os_error())
}

/// A pipe used as a kernel-side conduit for one connection.
#[derive(Debug)]
pub struct DataHose {
    pipe: Option<(OwnedFd, OwnedFd)>,
    capacity: usize,
}

/// Whether this platform can splice at all.
pub fn hose_supported() -> bool {
    cfg!(target_os = "linux") && DataHose::open().is_ok()
}

#[cfg(target_os = "linux")]
impl DataHose {
    pub fn open() -> Result<Self, TransferError> {
        let mut fds = [0 as RawFd; 2];
        // SAFETY: `fds` is a valid two-element array for pipe2 to fill.
        if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
            return Err(TransferError::new(
                wasmhose_core::ErrorKind::HoseUnavailable,
                format!("pipe2: {}", std::io::Error::last_os_error()),
            ));
        }
        // SAFETY: pipe2 succeeded, so both descriptors are open and owned here.
        let (rd, wr) = unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) };
        // SAFETY: F_GETPIPE_SZ takes no argument and only queries the pipe.
        let cap = unsafe { libc::fcntl(wr.as_raw_fd(), libc::F_GETPIPE_SZ) };
        let capacity = if cap > 0 { cap as usize } else { 64 * 1024 };
        Ok(DataHose {
            pipe: Some((rd, wr)),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_open(&self) -> bool {
        self.pipe.is_some()
    }

    fn fds(&self) -> Result<(RawFd, RawFd), TransferError> {
        self.pipe
            .as_ref()
            .map(|(r, w)| (r.as_raw_fd(), w.as_raw_fd()))
            .ok_or_else(|| TransferError::new(wasmhose_core::ErrorKind::HoseUnavailable, "hose already closed"))
    }

    /// Move `data` to `sock` through the pipe.
    pub fn pump_out(&mut self, data: &[u8], sock: RawFd) -> Result<(), TransferError> {
        let (rd, wr) = self.fds()?;
        let mut sent = 0;
        while sent < data.len() {
            let want = (data.len() - sent).min(self.capacity);
            let iov = libc::iovec {
                iov_base: data[sent..].as_ptr() as *mut libc::c_void,
                iov_len: want,
            };
            // SAFETY: the iovec points into `data`, which outlives the call.
            let mapped = unsafe { libc::vmsplice(wr, &iov, 1, libc::SPLICE_F_GIFT) };
            if mapped < 0 {
                return Err(last_os_error("vmsplice"));
            }
            let mapped = mapped as usize;
            let mut drained = 0;
            while drained < mapped {
                let more = sent + mapped < data.len();
                let flags = libc::SPLICE_F_MOVE | if more { libc::SPLICE_F_MORE } else { 0 };
                // SAFETY: plain descriptors, no user memory involved.
                let n = unsafe { libc::splice(rd, std::ptr::null_mut(), sock, std::ptr::null_mut(), mapped - drained, flags) };
                if n < 0 {
                    return Err(last_os_error("splice to socket"));
                }
                if n == 0 {
                    return Err(TransferError::unreachable("socket accepted no spliced bytes"));
                }
                drained += n as usize;
            }
            sent += mapped;
        }
        Ok(())
    }

    /// Fill `dst` from `sock` through the pipe.
    pub fn pump_in(&mut self, sock: RawFd, dst: &mut [u8]) -> Result<(), TransferError> {
        let (rd, wr) = self.fds()?;
        let total = dst.len();
        let mut got = 0;
        while got < total {
            let want = (total - got).min(self.capacity);
            // SAFETY: plain descriptors, no user memory involved.
            let n = unsafe { libc::splice(sock, std::ptr::null_mut(), wr, std::ptr::null_mut(), want, libc::SPLICE_F_MOVE) };
            if n < 0 {
                return Err(last_os_error("splice from socket"));
            }
            if n == 0 {
                return Err(TransferError::unreachable(format!("peer closed after {got} of {total} payload bytes")));
            }
            let mut left = n as usize;
            while left > 0 {
                let buf = &mut dst[got..got + left];
                // SAFETY: `buf` is a valid writable slice of `left` bytes.
                let r = unsafe { libc::read(rd, buf.as_mut_ptr() as *mut libc::c_void, buf.len()) };
                if r < 0 {
                    let e = std::io::Error::last_os_error();
                    if e.kind() == std::io::ErrorKind::Interrupted {
                        continue;
                    }
                    return Err(crate::transport::wire::io_error("draining pipe", e));
                }
                if r == 0 {
                    return Err(TransferError::unreachable("pipe closed while draining"));
                }
                got += r as usize;
                left -= r as usize;
            }
        }
        Ok(())
    }

    /// Close both pipe ends. Safe to call more than once.
    pub fn close_all(&mut self) {
        self.pipe = None;
    }
}

#[cfg(not(target_os = "linux"))]
impl DataHose {
    pub fn open() -> Result<Self, TransferError> {
        Err(TransferError::new(wasmhose_core::ErrorKind::HoseUnavailable, "splice is Linux-only"))
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn is_open(&self) -> bool {
        false
    }
    pub fn pump_out(&mut self, _data: &[u8], _sock: RawFd) -> Result<(), TransferError> {
        Self::open().map(|_| ())
    }
    pub fn pump_in(&mut self, _sock: RawFd, _dst: &mut [u8]) -> Result<(), TransferError> {
        Self::open().map(|_| ())
    }
    pub fn close_all(&mut self) {
        self.pipe = None;
    }
}

/// Tear down a connection's hose and, if given, its socket.
pub fn close_all(hose: &mut DataHose, sock: Option<&std::net::TcpStream>) {
    hose.close_all();
    if let Some(s) = sock {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
}
