function f(b, g) {
  var x = {};
  if (b) { x.foo = g; }
  return x;
}
var o1 = f(true, function f1() { return 1; });
var o2 = f(false, function f2() { return 2; });
o1.foo();
