# direct solution
powers = [0.0, 0.0]
print("powers=[" + ", ".join(repr(v) for v in powers) + "]"
