use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A line-oriented CSV destination flushed after every row.
pub struct CsvSink {
    out: Box<dyn Write>,
    label: PathBuf,
}

impl CsvSink {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(Box::new(BufWriter::new(file)), path, header)
    }

    pub fn stdout(header: &str) -> Result<Self> {
        Self::new(Box::new(io::stdout()), Path::new("<stdout>"), header)
    }

    /// Discards all rows.
    pub fn sink() -> Self {
        CsvSink {
            out: Box::new(io::sink()),
            label: PathBuf::from("<null>"),
        }
    }

    pub fn new(out: Box<dyn Write>, label: &Path, header: &str) -> Result<Self> {
        let mut s = CsvSink {
            out,
            label: label.to_path_buf(),
        };
        s.row(header)?;
        Ok(s)
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.label, e))
    }
}

/// `Write` into a shared buffer, for capturing CSV output in memory.
#[derive(Clone, Default)]
pub struct SharedBuffer(pub std::rc::Rc<std::cell::RefCell<Vec<u8>>>);

impl SharedBuffer {
    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.borrow()).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.borrow_mut().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
