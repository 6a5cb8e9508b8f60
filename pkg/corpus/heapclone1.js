function wrap(name, handler) {
  var o = {};
  o[name] = handler;
  return o;
}
var o1 = wrap("first", function f1() { return 1; });
var o2 = wrap("second", function f2() { return 2; });
o2.second();
