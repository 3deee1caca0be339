#!/usr/bin/env python3
"""Reference ingest used to produce pairs-200rows.golden.tsv.

Written separately from the Rust code with the standard library only. It
handles the markup that appears in the fixture dumps (paragraphs, lists,
line breaks, inline and block code, comments, entities).

usage: oracle_ingest.py DUMP.xml [TAG] > golden.tsv
"""
import html
import re
import sys
import xml.etree.ElementTree as ET
from html.parser import HTMLParser

BLOCK = {"p", "div", "blockquote", "ul", "ol", "li", "h1", "h2", "h3", "h4", "h5", "h6",
         "table", "thead", "tbody", "tfoot", "tr", "td", "th", "hr", "br", "dl", "dt", "dd"}
FENCE = "```"


class Body(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.out = []
        self.pre = None

    def text(self):
        return "".join(self.out)

    def fence(self, code):
        cur = self.text()
        if cur and not cur.endswith("\n"):
            self.out.append("\n")
        self.out.append(FENCE + "\n" + code.strip("\r\n") + "\n" + FENCE + "\n")

    def handle_starttag(self, tag, attrs):
        if tag == "pre":
            if self.pre is None:
                self.pre = []
        elif self.pre is None and tag in BLOCK:
            self.out.append("\n")

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        if tag == "pre":
            if self.pre is not None:
                self.fence("".join(self.pre))
                self.pre = None
        elif self.pre is None and tag in BLOCK:
            self.out.append("\n")

    def handle_data(self, data):
        (self.pre if self.pre is not None else self.out).append(data)


def tidy(text):
    lines, blank, in_fence = [], 0, False
    for line in text.split("\n"):
        if in_fence:
            lines.append(line)
            if line.rstrip() == FENCE:
                in_fence = False
            continue
        line = line.rstrip()
        if not line:
            blank += 1
            if blank <= 2:
                lines.append("")
            continue
        blank = 0
        if line == FENCE:
            in_fence = True
        lines.append(line)
    return "\n".join(lines).strip()


def normalize_body(body):
    p = Body()
    p.feed(body)
    p.close()
    if p.pre is not None:
        p.fence("".join(p.pre))
    return tidy(p.text())


def normalize_title(title):
    return " ".join(html.unescape(title).split())


def to_int(v):
    try:
        return int(v.strip())
    except (AttributeError, ValueError):
        return None


def rows(path):
    for _, el in ET.iterparse(path):
        if el.tag == "row":
            yield dict(el.attrib)
            el.clear()


def posts(path):
    for a in rows(path):
        pid, ptype = to_int(a.get("Id")), to_int(a.get("PostTypeId"))
        if pid is None or ptype is None:
            continue
        parent = to_int(a.get("ParentId"))
        if ptype == 2 and parent is None:
            continue
        tags = [t.strip().lower() for t in re.split(r"[<>|]", a.get("Tags", "")) if t.strip()]
        yield {
            "id": pid,
            "type": ptype,
            "parent": parent,
            "accepted": to_int(a.get("AcceptedAnswerId")) if ptype == 1 else None,
            "tags": tags if ptype != 2 else [],
            "title": a.get("Title", ""),
            "body": a.get("Body", ""),
        }


def esc(s):
    return s.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")


def main():
    path = sys.argv[1]
    tag = sys.argv[2] if len(sys.argv) > 2 else "java"
    everything = list(posts(path))
    by_id = {p["id"]: p for p in everything}
    for q in everything:
        if q["type"] != 1 or tag not in q["tags"] or q["accepted"] is None:
            continue
        a = by_id.get(q["accepted"])
        if a is None or a["type"] != 2 or a["parent"] != q["id"]:
            continue
        qt, at = normalize_body(q["body"]), normalize_body(a["body"])
        if not qt or not at:
            continue
        cols = [str(q["id"]), str(a["id"]), esc(normalize_title(q["title"])), esc(qt), esc(at), esc("|".join(q["tags"]))]
        sys.stdout.write("\t".join(cols) + "\n")


if __name__ == "__main__":
    main()
