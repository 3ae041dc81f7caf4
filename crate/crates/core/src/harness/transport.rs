// SPDX-License-Identifier: Apache-2.0

//! Line-oriented TCP transport. One request line, one reply line.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::messages::{Endpoint, TransportError};

/// Client side of a line connection.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpLink {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(writer.try_clone()?),
            writer,
        })
    }
}

impl Endpoint for TcpLink {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        let io_err = |e: io::Error| TransportError(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.write_all(b"\n").map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(TransportError("connection closed".into()));
        }
        Ok(reply.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// An endpoint shared between connections, locked per exchange.
pub struct Shared<E>(pub Arc<Mutex<E>>);

impl<E: Endpoint> Endpoint for Shared<E> {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        self.0
            .lock()
            .map_err(|_| TransportError("endpoint poisoned".into()))?
            .exchange_line(line)
    }
}

/// Answers lines on `stream` until the peer closes it.
pub fn serve_connection(stream: TcpStream, endpoint: &mut dyn Endpoint) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let reply = endpoint
            .exchange_line(line.trim_end_matches(['\r', '\n']))
            .map_err(|TransportError(e)| io::Error::other(e))?;
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

/// Accepts exactly `connections` clients, each on its own thread, and
/// serves them all from `endpoint`.
pub fn serve<E: Endpoint + Send + 'static>(
    listener: TcpListener,
    endpoint: Arc<Mutex<E>>,
    connections: usize,
) -> JoinHandle<io::Result<()>> {
    thread::spawn(move || {
        let mut workers = Vec::with_capacity(connections);
        for _ in 0..connections {
            let (stream, _) = listener.accept()?;
            let mut shared = Shared(endpoint.clone());
            workers.push(thread::spawn(move || serve_connection(stream, &mut shared)));
        }
        for w in workers {
            w.join().map_err(|_| io::Error::other("connection thread panicked"))??;
        }
        Ok(())
    })
}
