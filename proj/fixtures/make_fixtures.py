#!/usr/bin/env python3
"""Regenerates the tiny illusion-style PNGs used by the test suite.

The images are deliberately small and schematic; the pipeline never inspects
pixels, it only ships the bytes to a backend.
"""
from PIL import Image, ImageDraw


def save(name, draw_fn, size=(96, 96), background="white"):
    image = Image.new("RGB", size, background)
    draw_fn(ImageDraw.Draw(image))
    image.save(name, format="PNG")
    print(name)


def poggendorff(d):
    d.rectangle([40, 8, 56, 88], fill=(160, 160, 160))
    d.line([8, 20, 40, 44], fill=(200, 30, 30), width=3)
    d.line([56, 56, 88, 80], fill=(200, 30, 30), width=3)


def mueller(d):
    d.line([16, 32, 80, 32], fill="black", width=2)
    d.line([16, 32, 8, 24], fill="black", width=2)
    d.line([16, 32, 8, 40], fill="black", width=2)
    d.line([80, 32, 88, 24], fill="black", width=2)
    d.line([80, 32, 88, 40], fill="black", width=2)
    d.line([16, 64, 80, 64], fill="black", width=2)
    d.line([16, 64, 24, 56], fill="black", width=2)
    d.line([16, 64, 24, 72], fill="black", width=2)
    d.line([80, 64, 72, 56], fill="black", width=2)
    d.line([80, 64, 72, 72], fill="black", width=2)


def ebbinghaus(d):
    d.ellipse([20, 36, 44, 60], fill=(240, 130, 30))
    for cx, cy in [(12, 24), (52, 24), (12, 72), (52, 72)]:
        d.ellipse([cx - 10, cy - 10, cx + 10, cy + 10], outline="black")
    d.ellipse([64, 40, 80, 56], fill=(240, 130, 30))
    for cx, cy in [(60, 32), (84, 32), (60, 64), (84, 64)]:
        d.ellipse([cx - 4, cy - 4, cx + 4, cy + 4], outline="black")


def checker(d):
    for row in range(4):
        for col in range(4):
            shade = (90, 90, 90) if (row + col) % 2 else (190, 190, 190)
            d.rectangle([col * 24, row * 24, col * 24 + 24, row * 24 + 24], fill=shade)
    d.rectangle([24, 24, 48, 48], fill=(140, 140, 140))
    d.rectangle([48, 48, 72, 72], fill=(140, 140, 140))
    d.text((30, 28), "A", fill="black")
    d.text((54, 52), "B", fill="black")


def zollner(d):
    for y in (24, 48, 72):
        d.line([8, y, 88, y], fill="black", width=2)
        for x in range(12, 88, 12):
            offset = 5 if (y // 24) % 2 else -5
            d.line([x - 4, y - offset, x + 4, y + offset], fill="black", width=1)


def kanizsa(d):
    for cx, cy in [(24, 24), (72, 24), (48, 72)]:
        d.pieslice([cx - 12, cy - 12, cx + 12, cy + 12], 0, 360, fill="black")
    d.polygon([(24, 24), (72, 24), (48, 72)], fill="white")


if __name__ == "__main__":
    import os

    os.chdir(os.path.dirname(os.path.abspath(__file__)))
    save("poggendorff.png", poggendorff)
    save("mueller.png", mueller)
    save("ebbinghaus.png", ebbinghaus)
    save("checker.png", checker)
    save("zollner.png", zollner)
    save("kanizsa.png", kanizsa)
