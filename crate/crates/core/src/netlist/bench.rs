//! `.bench` reader and writer.

use std::fmt::Write;

use super::{GateKind, Netlist, NetlistBuilder, NetlistError};

fn is_name_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '(' | ')' | ',' | '=' | '#')
}

fn check_name(name: &str, line: usize) -> Result<&str, NetlistError> {
    if name.is_empty() || !name.chars().all(is_name_char) {
        return Err(NetlistError::Syntax {
            line,
            msg: format!("invalid net name `{name}`"),
        });
    }
    Ok(name)
}

/// Split `KEYWORD(args)` into keyword and argument list.
fn call(text: &str, line: usize) -> Result<(&str, Vec<&str>), NetlistError> {
    let syntax = |msg: &str| NetlistError::Syntax {
        line,
        msg: msg.to_string(),
    };
    let open = text.find('(').ok_or_else(|| syntax("expected `(`"))?;
    let rest = &text[open + 1..];
    let close = rest.find(')').ok_or_else(|| syntax("expected `)`"))?;
    if !rest[close + 1..].trim().is_empty() {
        return Err(syntax("unexpected text after `)`"));
    }
    let kw = text[..open].trim();
    if kw.is_empty() {
        return Err(syntax("missing keyword before `(`"));
    }
    let body = rest[..close].trim();
    let args = if body.is_empty() {
        Vec::new()
    } else {
        body.split(',').map(str::trim).collect()
    };
    for a in &args {
        check_name(a, line)?;
    }
    Ok((kw, args))
}

/// Parse `.bench` text into an elaborated netlist.
pub fn parse_bench(text: &str) -> Result<Netlist, NetlistError> {
    let mut b = NetlistBuilder::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stmt = raw.split('#').next().unwrap_or("").trim();
        if stmt.is_empty() {
            continue;
        }
        if let Some((lhs, rhs)) = stmt.split_once('=') {
            let out = check_name(lhs.trim(), line)?;
            let (kw, args) = call(rhs.trim(), line)?;
            let kind = GateKind::from_keyword(kw).ok_or_else(|| NetlistError::UnknownGate {
                line,
                kind: kw.to_string(),
            })?;
            if let Some(expected) = kind.arity_ok(args.len()) {
                return Err(NetlistError::Arity {
                    line,
                    kind: kind.keyword().to_string(),
                    net: out.to_string(),
                    expected,
                    got: args.len(),
                });
            }
            b.gate_at(kind, out, &args, line);
        } else {
            let (kw, args) = call(stmt, line)?;
            if args.len() != 1 {
                return Err(NetlistError::Syntax {
                    line,
                    msg: format!("`{kw}` takes exactly one net"),
                });
            }
            match kw.to_ascii_uppercase().as_str() {
                "INPUT" => b.input_at(args[0], line),
                "OUTPUT" => {
                    b.output(args[0]);
                }
                _ => {
                    return Err(NetlistError::Syntax {
                        line,
                        msg: format!("expected INPUT, OUTPUT or an assignment, found `{kw}`"),
                    })
                }
            }
        }
    }
    b.build()
}

/// Render a netlist in the `.bench` dialect accepted by [`parse_bench`].
pub fn write_bench(n: &Netlist) -> String {
    let mut s = String::new();
    let ffs = n.flip_flops().len();
    let _ = writeln!(
        s,
        "# {} inputs, {} outputs, {} DFFs, {} gates",
        n.primary_inputs().len(),
        n.primary_outputs().len(),
        ffs,
        n.gates().len() - ffs
    );
    s.push('\n');
    for &i in n.primary_inputs() {
        let _ = writeln!(s, "INPUT({})", n.net_name(i));
    }
    for &o in n.primary_outputs() {
        let _ = writeln!(s, "OUTPUT({})", n.net_name(o));
    }
    s.push('\n');
    for g in n.gates() {
        let ins: Vec<&str> = g.inputs.iter().map(|&i| n.net_name(i)).collect();
        let _ = writeln!(s, "{} = {}({})", n.net_name(g.output), g.kind.keyword(), ins.join(", "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const C17: &str = include_str!("../../../../benchmarks/c17.bench");

    #[test]
    fn tiny_nand() {
        let n = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = NAND(a, b)").unwrap();
        assert_eq!(n.primary_inputs().len(), 2);
        assert_eq!(n.primary_outputs().len(), 1);
        assert_eq!(n.gates().len(), 1);
        assert_eq!(n.gates()[0].kind, GateKind::Nand);
    }

    #[test]
    fn c17_counts() {
        let n = parse_bench(C17).unwrap();
        assert_eq!(n.primary_inputs().len(), 5);
        assert_eq!(n.primary_outputs().len(), 2);
        assert_eq!(n.gates().len(), 6);
        assert!(n.gates().iter().all(|g| g.kind == GateKind::Nand));
        assert_eq!(n.net_name(n.primary_inputs()[3]), "6");
    }

    #[test]
    fn unterminated_call_is_a_syntax_error_on_its_line() {
        let e = parse_bench("y = NAND(a").unwrap_err();
        assert!(matches!(e, NetlistError::Syntax { line: 1, .. }), "{e}");
        let e = parse_bench("INPUT(a)\n\n# c\nOUTPUT(y\n").unwrap_err();
        assert!(matches!(e, NetlistError::Syntax { line: 4, .. }), "{e}");
    }

    #[test]
    fn unknown_kind_and_duplicate_driver() {
        let e = parse_bench("INPUT(a)\ny = MAJ(a, a, a)").unwrap_err();
        assert_eq!(
            e,
            NetlistError::UnknownGate {
                line: 2,
                kind: "MAJ".into()
            }
        );
        let e = parse_bench("INPUT(a)\ny = NOT(a)\ny = BUF(a)").unwrap_err();
        assert_eq!(e, NetlistError::DuplicateDriver { net: "y".into() });
        let e = parse_bench("OUTPUT(y)\ny = NOT(q)").unwrap_err();
        assert_eq!(e, NetlistError::Undriven { net: "q".into() });
    }

    #[test]
    fn comments_case_and_buff_alias() {
        let n = parse_bench("input(a) # in\nOUTPUT(z)\nz = buff(a)\n").unwrap();
        assert_eq!(n.gates()[0].kind, GateKind::Buf);
    }

    #[test]
    fn dff_lines_create_flip_flops() {
        let s27 = include_str!("../../../../benchmarks/s27.bench");
        let n = parse_bench(s27).unwrap();
        assert_eq!(n.flip_flops().len(), 3);
        assert_eq!(n.ff_name(&n.flip_flops()[2]), "G7");
        assert_eq!(n.logic_gate_count(), 10);
    }
}
