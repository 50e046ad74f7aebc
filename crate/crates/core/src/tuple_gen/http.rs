use super::{normalize_host_bytes, NoHost};

/// RFC 9110 token characters.
fn is_tchar(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
}

/// Splits off the next line terminated by LF (an optional preceding CR is
/// dropped). Returns `None` when no terminator remains in the captured bytes.
fn next_line(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = buf.iter().position(|&b| b == b'\n')?;
    let line = &buf[..nl];
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    Some((line, &buf[nl + 1..]))
}

fn is_request_line(line: &[u8]) -> bool {
    let mut parts = line.split(|&b| b == b' ');
    let (Some(method), Some(target), Some(version), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    !method.is_empty()
        && method.iter().all(|&b| is_tchar(b))
        && !target.is_empty()
        && target.iter().all(|&b| b > 0x20 && b != 0x7f)
        && (version == b"HTTP/1.1" || version == b"HTTP/1.0")
}

/// Returns the normalized value of the first `Host` header of an HTTP/1.x
/// request. Folded (obs-fold) continuation lines are joined to the header
/// they continue; a header line cut off by the capture length is ignored.
pub fn extract_http_host(payload: &[u8]) -> Result<String, NoHost> {
    let mut rest = payload;
    // Tolerate stray empty lines before the request line.
    let request_line = loop {
        let (line, tail) = next_line(rest).ok_or(NoHost)?;
        rest = tail;
        if !line.is_empty() {
            break line;
        }
    };
    if !is_request_line(request_line) {
        return Err(NoHost);
    }

    let mut host: Option<Vec<u8>> = None;
    while let Some((line, tail)) = next_line(rest) {
        rest = tail;
        if line.is_empty() {
            break;
        }
        if line[0] == b' ' || line[0] == b'\t' {
            if let Some(value) = host.as_mut() {
                value.push(b' ');
                value.extend_from_slice(line);
            }
            continue;
        }
        if host.is_some() {
            break;
        }
        let Some(colon) = line.iter().position(|&b| b == b':') else {
            continue;
        };
        let name = &line[..colon];
        if name.eq_ignore_ascii_case(b"host") {
            host = Some(line[colon + 1..].to_vec());
        }
    }
    host.and_then(|v| normalize_host_bytes(&v)).ok_or(NoHost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        assert_eq!(extract_http_host(b"GET / HTTP/1.1\r\nHost: Example.COM\r\n\r\n").unwrap(), "example.com");
        assert_eq!(extract_http_host(b"POST /x HTTP/1.0\r\nhost: a.b.c:8080\r\n\r\n").unwrap(), "a.b.c");
        assert_eq!(extract_http_host(b"HTTP/1.1 200 OK\r\nHost: a.b\r\n\r\n"), Err(NoHost));
    }

    #[test]
    fn folded_host_value() {
        assert_eq!(extract_http_host(b"GET / HTTP/1.1\r\nHost:\r\n   fold.example\r\n\r\n").unwrap(), "fold.example");
        // Folding that introduces inner whitespace fails the character rules.
        assert_eq!(extract_http_host(b"GET / HTTP/1.1\r\nHost: a\r\n b\r\n\r\n"), Err(NoHost));
    }

    #[test]
    fn first_host_wins_and_truncation() {
        let p = b"GET / HTTP/1.1\r\nHost: one.example\r\nHost: two.example\r\n\r\n";
        assert_eq!(extract_http_host(p).unwrap(), "one.example");
        assert_eq!(extract_http_host(b"GET / HTTP/1.1\r\nHost: cut.exa"), Err(NoHost));
        assert_eq!(extract_http_host(b"GET / HTTP/1.1"), Err(NoHost));
    }

    #[test]
    fn request_line_shape() {
        assert_eq!(extract_http_host(b"GET / HTTP/2.0\r\nHost: a.b\r\n\r\n"), Err(NoHost));
        assert_eq!(extract_http_host(b"GET  / HTTP/1.1\r\nHost: a.b\r\n\r\n"), Err(NoHost));
        assert_eq!(extract_http_host(b"G(T / HTTP/1.1\r\nHost: a.b\r\n\r\n"), Err(NoHost));
        assert_eq!(extract_http_host(b"\r\nGET / HTTP/1.1\nHost: a.b\n\n").unwrap(), "a.b");
    }
}
