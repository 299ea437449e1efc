//! TCP endpoint: one control thread owns the session, a reader thread
//! forwards client lines in order and a writer thread drains the outbox.

use crate::protocol::MAX_LINE;
use crate::session::{Channel, Outgoing, Session, SessionConfig};
use crate::scenario::Scenario;
use crate::HarnessError;
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Wall-clock tick period; `None` runs as fast as possible.
    pub period: Option<Duration>,
    /// Stop after this many connections.
    pub max_connections: Option<usize>,
    pub session: SessionConfig,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            period: Some(Duration::from_millis(40)),
            max_connections: None,
            session: SessionConfig::default(),
        }
    }
}

pub fn bind(addr: &str) -> Result<TcpListener, HarnessError> {
    TcpListener::bind(addr).map_err(|source| HarnessError::Bind {
        addr: addr.into(),
        source,
    })
}

/// Serves sessions one connection at a time.
pub fn serve(listener: TcpListener, scenario: &Scenario, opts: &ServeOptions) -> Result<(), HarnessError> {
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        let session = Session::from_scenario(scenario, opts.session.clone())?;
        // a broken connection ends its session only
        let _ = run_connection(stream, session, opts.period);
        served += 1;
        if opts.max_connections.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[derive(Default)]
struct Outbox {
    queue: VecDeque<Outgoing>,
    closed: bool,
}

/// Queues a line. A newer frame or mosaic replaces an unsent one.
fn push(outbox: &(Mutex<Outbox>, Condvar), msg: Outgoing) {
    let mut o = outbox.0.lock().expect("outbox lock");
    if msg.channel != Channel::Control {
        if let Some(old) = o.queue.iter_mut().find(|m| m.channel == msg.channel) {
            *old = msg;
            return;
        }
    }
    o.queue.push_back(msg);
    outbox.1.notify_one();
}

/// Reads one line, keeping at most `MAX_LINE + 1` bytes of it so that an
/// overlong line is still rejected by the session without being buffered.
fn read_bounded_line(reader: &mut impl BufRead) -> std::io::Result<Option<String>> {
    let mut buf = Vec::new();
    if reader.by_ref().take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)? == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    } else if buf.len() > MAX_LINE {
        let mut skip = Vec::new();
        loop {
            skip.clear();
            let n = reader.by_ref().take(MAX_LINE as u64).read_until(b'\n', &mut skip)?;
            if n == 0 || skip.last() == Some(&b'\n') {
                break;
            }
        }
    }
    Ok(Some(String::from_utf8_lossy(&buf).into_owned()))
}

fn run_connection(stream: TcpStream, mut session: Session, period: Option<Duration>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<String>();
    let read_thread = thread::spawn(move || {
        let mut reader = reader;
        while let Ok(Some(line)) = read_bounded_line(&mut reader) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let outbox = Arc::new((Mutex::new(Outbox::default()), Condvar::new()));
    let out2 = Arc::clone(&outbox);
    let write_thread = thread::spawn(move || -> std::io::Result<()> {
        loop {
            let msg = {
                let mut o = out2.0.lock().expect("outbox lock");
                while o.queue.is_empty() && !o.closed {
                    o = out2.1.wait(o).expect("outbox lock");
                }
                match o.queue.pop_front() {
                    Some(m) => m,
                    None => return Ok(()),
                }
            };
            writer.write_all(msg.line.as_bytes())?;
            writer.write_all(b"\n")?;
        }
    });

    push(&outbox, session.hello());
    let mut deadline = Instant::now();
    'outer: loop {
        loop {
            match rx.try_recv() {
                Ok(line) => {
                    for m in session.handle_line(&line) {
                        push(&outbox, m);
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => break 'outer,
            }
        }
        for m in session.tick() {
            push(&outbox, m);
        }
        if write_thread.is_finished() {
            break;
        }
        match period {
            Some(p) => {
                deadline += p;
                let now = Instant::now();
                if deadline > now {
                    thread::sleep(deadline - now);
                } else {
                    deadline = now;
                }
            }
            None => thread::yield_now(),
        }
    }
    {
        let mut o = outbox.0.lock().expect("outbox lock");
        o.closed = true;
        outbox.1.notify_all();
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
    let _ = read_thread.join();
    write_thread.join().unwrap_or(Ok(()))
}
