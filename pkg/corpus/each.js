var jQuery = {};
jQuery.cssHooks = {};
jQuery.fn = {};
jQuery.each = function (obj, callback) {
  var i = 0;
  var length = obj.length;
  for (; i < length; i++) {
    callback.call(obj[i], i, obj[i]);
  }
};
jQuery.each(["height", "width"], function (i, name) {
  jQuery.cssHooks[name] = {};
});
jQuery.each(["toggle", "show", "hide"], function (i, name) {
  jQuery.fn[name] = {};
});
