#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Local(String),
    Global(String),
    Int(i64),
    Punct(char),
    Arrow,
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, (Pos, String)> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == ';' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '%' || c == '@' {
            bump!();
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                bump!();
            }
            if start == i {
                return Err((pos, format!("expected a name after '{c}'")));
            }
            let name: String = chars[start..i].iter().collect();
            out.push(Token {
                tok: if c == '%' { Tok::Local(name) } else { Tok::Global(name) },
                pos,
            });
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                bump!();
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if c == '-' && i + 1 < chars.len() && chars[i + 1] == '>' {
            bump!();
            bump!();
            out.push(Token { tok: Tok::Arrow, pos });
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) {
            let neg = c == '-';
            if neg {
                bump!();
            }
            let start = i;
            let hex = chars[i] == '0' && i + 1 < chars.len() && (chars[i + 1] == 'x' || chars[i + 1] == 'X');
            if hex {
                bump!();
                bump!();
            }
            let digits_start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                bump!();
            }
            let text: String = chars[digits_start..i].iter().collect();
            let parsed = if hex {
                u64::from_str_radix(&text, 16).map(|v| v as i64).ok()
            } else {
                let s: String = chars[start..i].iter().collect();
                s.parse::<i64>()
                    .ok()
                    .or_else(|| s.parse::<u64>().ok().map(|v| v as i64))
            };
            let Some(mut v) = parsed else {
                let s: String = chars[start..i].iter().collect();
                return Err((pos, format!("invalid integer literal '{s}'")));
            };
            if neg {
                v = v.wrapping_neg();
            }
            out.push(Token { tok: Tok::Int(v), pos });
            continue;
        }
        if "(){}[]<>,:=".contains(c) {
            bump!();
            out.push(Token {
                tok: Tok::Punct(c),
                pos,
            });
            continue;
        }
        return Err((pos, format!("unexpected character '{c}'")));
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}
